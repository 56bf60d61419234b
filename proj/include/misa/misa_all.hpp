// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "misa/baselines.hpp"
#include "misa/core.hpp"
#include "misa/dsa.hpp"
#include "misa/harness.hpp"
#include "misa/kernels.hpp"
#include "misa/metrics.hpp"
#include "misa/misa.hpp"
#include "misa/pooling.hpp"
#include "misa/topk.hpp"
#include "misa/workload_io.hpp"
