#pragma once

// Umbrella header for the whole library.

#include "mos/adam.hpp"
#include "mos/checkpoint.hpp"
#include "mos/errors.hpp"
#include "mos/grad_check.hpp"
#include "mos/inference.hpp"
#include "mos/io.hpp"
#include "mos/json_util.hpp"
#include "mos/memory.hpp"
#include "mos/metrics.hpp"
#include "mos/model.hpp"
#include "mos/nn.hpp"
#include "mos/random.hpp"
#include "mos/synthdata.hpp"
#include "mos/tensor.hpp"
#include "mos/training.hpp"
