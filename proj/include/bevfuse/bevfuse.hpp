#pragma once

#include "bevfuse/common.hpp"
#include "bevfuse/dataset.hpp"
#include "bevfuse/fisheye.hpp"
#include "bevfuse/geometry.hpp"
#include "bevfuse/io.hpp"
#include "bevfuse/metrics.hpp"
#include "bevfuse/nn/gradcheck.hpp"
#include "bevfuse/nn/network.hpp"
#include "bevfuse/nn/ops.hpp"
#include "bevfuse/nn/optim.hpp"
#include "bevfuse/nn/tensor.hpp"
#include "bevfuse/pipeline.hpp"
#include "bevfuse/sim.hpp"
#include "bevfuse/sync.hpp"
#include "bevfuse/ultrasonic.hpp"
