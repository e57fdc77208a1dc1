#pragma once

// Umbrella header for the noise-space HMC library.

#include "nhmc/artifacts.hpp"
#include "nhmc/config.hpp"
#include "nhmc/core.hpp"
#include "nhmc/decoder.hpp"
#include "nhmc/likelihood.hpp"
#include "nhmc/operators.hpp"
#include "nhmc/oracle.hpp"
#include "nhmc/prior.hpp"
#include "nhmc/rng.hpp"
#include "nhmc/runner.hpp"
#include "nhmc/sampler.hpp"
#include "nhmc/schedules.hpp"
