#pragma once

#include "flowens/evalmetrics/metrics.hpp"
