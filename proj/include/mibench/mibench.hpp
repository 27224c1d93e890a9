#pragma once

#include "mibench/errors.hpp"
#include "mibench/rng.hpp"
#include "mibench/batch.hpp"
#include "mibench/tape.hpp"
#include "mibench/mlp.hpp"
#include "mibench/adam.hpp"
#include "mibench/gaussian_mixture.hpp"
#include "mibench/langevin.hpp"
#include "mibench/augment.hpp"
#include "mibench/linalg.hpp"
#include "mibench/tica.hpp"
#include "mibench/kmeans.hpp"
#include "mibench/quantizer.hpp"
#include "mibench/critic.hpp"
#include "mibench/estimators.hpp"
#include "mibench/proposals.hpp"
#include "mibench/discrete.hpp"
#include "mibench/hybrid.hpp"
#include "mibench/io.hpp"
#include "mibench/experiment.hpp"
