#pragma once

#include "ttm/assignment.hpp"
#include "ttm/core.hpp"
#include "ttm/error.hpp"
#include "ttm/io.hpp"
#include "ttm/metrics.hpp"
#include "ttm/rng.hpp"
#include "ttm/scorer.hpp"
#include "ttm/synth.hpp"
#include "ttm/test_time_matching.hpp"
#include "ttm/validate.hpp"
