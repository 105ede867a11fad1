#pragma once

#include "cdnb/models/checkpoint.hpp"
#include "cdnb/models/registry.hpp"
