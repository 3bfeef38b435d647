// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "clocs/common.hpp"
#include "clocs/geometry.hpp"
#include "clocs/candidates.hpp"
#include "clocs/encoder.hpp"
#include "clocs/network.hpp"
#include "clocs/training.hpp"
#include "clocs/nms.hpp"
#include "clocs/eval.hpp"
#include "clocs/synth.hpp"
#include "clocs/config.hpp"
#include "clocs/io.hpp"
#include "clocs/pipeline.hpp"
