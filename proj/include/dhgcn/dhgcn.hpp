#pragma once

#include "dhgcn/autodiff.hpp"
#include "dhgcn/dataset.hpp"
#include "dhgcn/errors.hpp"
#include "dhgcn/geometry.hpp"
#include "dhgcn/model.hpp"
#include "dhgcn/optim.hpp"
#include "dhgcn/partition.hpp"
#include "dhgcn/rng.hpp"
#include "dhgcn/synthetic.hpp"
#include "dhgcn/tensor.hpp"
#include "dhgcn/training.hpp"
