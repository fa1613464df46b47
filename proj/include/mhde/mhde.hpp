#pragma once

// Everything in one include.

#include "mhde/designs.hpp"
#include "mhde/errors.hpp"
#include "mhde/estimator.hpp"
#include "mhde/families.hpp"
#include "mhde/inference.hpp"
#include "mhde/io.hpp"
#include "mhde/kde.hpp"
#include "mhde/model_grid.hpp"
#include "mhde/nelder_mead.hpp"
#include "mhde/quadrature.hpp"
#include "mhde/rng.hpp"
#include "mhde/robustness.hpp"
#include "mhde/simlab.hpp"
#include "mhde/special.hpp"
#include "mhde/survey.hpp"
