#pragma once

#include "crn/autodiff/adam.hpp"
#include "crn/autodiff/checkpoint.hpp"
#include "crn/autodiff/dropout.hpp"
#include "crn/autodiff/parameter.hpp"
#include "crn/autodiff/tape.hpp"
#include "crn/autodiff/tensor.hpp"
