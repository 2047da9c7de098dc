#pragma once

#include "flowens/flows/flow_model.hpp"
#include "flowens/flows/gaussian_base.hpp"
#include "flowens/flows/normalizer.hpp"
#include "flowens/flows/spline.hpp"
