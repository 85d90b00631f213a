#pragma once
// Umbrella header.

#include "azema/coeffs.hpp"
#include "azema/common.hpp"
#include "azema/filter.hpp"
#include "azema/harness.hpp"
#include "azema/hitting.hpp"
#include "azema/parallel.hpp"
#include "azema/pricing.hpp"
#include "azema/rng.hpp"
#include "azema/simulate.hpp"
