#pragma once

#include "dprm/cgcm.hpp"
#include "dprm/disorder.hpp"
#include "dprm/errors.hpp"
#include "dprm/experiment.hpp"
#include "dprm/kernel.hpp"
#include "dprm/lattice.hpp"
#include "dprm/oracle.hpp"
#include "dprm/partition.hpp"
#include "dprm/replica.hpp"
#include "dprm/rng.hpp"
#include "dprm/stats.hpp"
#include "dprm/walk.hpp"
