// Copyright (c) 2026 tron-cpp contributors
// SPDX-License-Identifier: Apache-2.0

// Umbrella header.

#pragma once

#include "tron/bench.hpp"
#include "tron/config.hpp"
#include "tron/data.hpp"
#include "tron/errors.hpp"
#include "tron/eval.hpp"
#include "tron/loss.hpp"
#include "tron/model.hpp"
#include "tron/optim.hpp"
#include "tron/rng.hpp"
#include "tron/sampler.hpp"
#include "tron/tensor.hpp"
#include "tron/train.hpp"
