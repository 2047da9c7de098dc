#pragma once

#include "flowens/activelearn.hpp"
#include "flowens/diffcore.hpp"
#include "flowens/ensembles.hpp"
#include "flowens/environments.hpp"
#include "flowens/evalmetrics.hpp"
#include "flowens/flows.hpp"
#include "flowens/uncertainty.hpp"
