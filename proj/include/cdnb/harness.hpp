#pragma once

#include "cdnb/harness/config.hpp"
#include "cdnb/harness/experiment.hpp"
#include "cdnb/harness/paper.hpp"
#include "cdnb/harness/reports.hpp"
#include "cdnb/harness/robustness.hpp"
#include "cdnb/harness/stats.hpp"
#include "cdnb/harness/train.hpp"
