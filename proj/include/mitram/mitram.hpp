#pragma once

// Umbrella header for the mixed-effects transformation model library.

#include "mitram/basis.hpp"
#include "mitram/covariance.hpp"
#include "mitram/csv.hpp"
#include "mitram/cubature.hpp"
#include "mitram/data.hpp"
#include "mitram/fit.hpp"
#include "mitram/io.hpp"
#include "mitram/likelihood.hpp"
#include "mitram/link.hpp"
#include "mitram/marginal.hpp"
#include "mitram/normal.hpp"
#include "mitram/optim.hpp"
#include "mitram/simulate.hpp"
#include "mitram/spec_file.hpp"
#include "mitram/util.hpp"
