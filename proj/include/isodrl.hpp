#pragma once

// Umbrella header for the isodrl library.

#include "isodrl/core.hpp"
#include "isodrl/random.hpp"
#include "isodrl/parallel.hpp"
#include "isodrl/isotonic.hpp"
#include "isodrl/drl.hpp"
#include "isodrl/oracle.hpp"
#include "isodrl/robust_iso.hpp"
#include "isodrl/ratio.hpp"
#include "isodrl/csv.hpp"
#include "isodrl/data.hpp"
#include "isodrl/conformal.hpp"
#include "isodrl/experiments.hpp"
