#pragma once

#include "cdnb/autograd/ops.hpp"
#include "cdnb/autograd/optim.hpp"
#include "cdnb/autograd/tape.hpp"
#include "cdnb/autograd/tensor.hpp"
