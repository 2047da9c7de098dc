#pragma once

#include "flowens/diffcore/adam.hpp"
#include "flowens/diffcore/checkpoint.hpp"
#include "flowens/diffcore/mlp.hpp"
#include "flowens/diffcore/param_store.hpp"
#include "flowens/diffcore/tape.hpp"
