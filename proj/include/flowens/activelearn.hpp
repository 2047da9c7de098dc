#pragma once

#include "flowens/activelearn/loop.hpp"
