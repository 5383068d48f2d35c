#pragma once

#include "podf/tensor.hpp"
#include "podf/ops.hpp"
#include "podf/conv.hpp"
#include "podf/batch_norm.hpp"
#include "podf/params.hpp"
#include "podf/blocks.hpp"
#include "podf/fusion.hpp"
#include "podf/model.hpp"
#include "podf/loss.hpp"
#include "podf/labels.hpp"
#include "podf/metrics.hpp"
#include "podf/optim.hpp"
#include "podf/tensor_file.hpp"
#include "podf/synth.hpp"
#include "podf/config.hpp"
#include "podf/checkpoint.hpp"
#include "podf/train.hpp"
#include "podf/gradcheck.hpp"
