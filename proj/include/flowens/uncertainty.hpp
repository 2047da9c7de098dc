#pragma once

#include "flowens/uncertainty/dim_study.hpp"
#include "flowens/uncertainty/entropy.hpp"
#include "flowens/uncertainty/epistemic.hpp"
#include "flowens/uncertainty/knn_kl.hpp"
