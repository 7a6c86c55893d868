#pragma once

// Umbrella header for the SDS pruning library.

#include "sds/calibration.hpp"
#include "sds/container.hpp"
#include "sds/error.hpp"
#include "sds/linalg.hpp"
#include "sds/manifest.hpp"
#include "sds/matrix.hpp"
#include "sds/model.hpp"
#include "sds/pipeline.hpp"
#include "sds/pruning.hpp"
#include "sds/reconstruction.hpp"
#include "sds/rng.hpp"
#include "sds/sparse.hpp"
