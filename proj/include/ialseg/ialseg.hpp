#pragma once

#include "ialseg/checkpoint.hpp"
#include "ialseg/data.hpp"
#include "ialseg/gradcheck.hpp"
#include "ialseg/hierarchy.hpp"
#include "ialseg/layers.hpp"
#include "ialseg/loss.hpp"
#include "ialseg/metrics.hpp"
#include "ialseg/network.hpp"
#include "ialseg/ops.hpp"
#include "ialseg/optim.hpp"
#include "ialseg/tensor.hpp"
#include "ialseg/train.hpp"
