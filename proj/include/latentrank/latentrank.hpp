#pragma once

// Umbrella header for the full pipeline.

#include "latentrank/config.hpp"
#include "latentrank/datamodel.hpp"
#include "latentrank/encoding.hpp"
#include "latentrank/errors.hpp"
#include "latentrank/network.hpp"
#include "latentrank/numkernel.hpp"
#include "latentrank/objective.hpp"
#include "latentrank/ranking.hpp"
#include "latentrank/sampling.hpp"
#include "latentrank/selfcheck.hpp"
#include "latentrank/trainer.hpp"
