#pragma once

#include "flowens/expcli/cli.hpp"
