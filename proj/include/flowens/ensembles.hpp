#pragma once

#include "flowens/ensembles/density_model.hpp"
#include "flowens/ensembles/factory.hpp"
#include "flowens/ensembles/flow_ensemble.hpp"
#include "flowens/ensembles/gaussian_mixture.hpp"
#include "flowens/ensembles/gaussian_nets.hpp"
#include "flowens/ensembles/gp.hpp"
#include "flowens/ensembles/mask_set.hpp"
