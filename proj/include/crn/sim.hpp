#pragma once

#include "crn/sim/counterfactual.hpp"
#include "crn/sim/io.hpp"
#include "crn/sim/priors.hpp"
#include "crn/sim/tumor.hpp"
