#pragma once

#include "tamd/errors.hpp"
#include "tamd/model.hpp"
#include "tamd/rng.hpp"
#include "tamd/spectral.hpp"
#include "tamd/freenergy.hpp"
#include "tamd/observables.hpp"
#include "tamd/sde.hpp"
#include "tamd/estimators.hpp"
#include "tamd/linalg.hpp"
#include "tamd/fpgrid.hpp"
#include "tamd/config.hpp"
#include "tamd/csv.hpp"
#include "tamd/runner.hpp"
