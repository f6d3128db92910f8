#pragma once

#include "gncl/core.hpp"
#include "gncl/rng.hpp"
#include "gncl/losses.hpp"
#include "gncl/network.hpp"
#include "gncl/parallel.hpp"
#include "gncl/data.hpp"
#include "gncl/decomposition.hpp"
#include "gncl/training.hpp"
#include "gncl/harness.hpp"
