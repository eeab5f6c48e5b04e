#pragma once

#include "aggregators.hpp"
#include "corpus.hpp"
#include "eval.hpp"
#include "experiment.hpp"
#include "features.hpp"
#include "formats.hpp"
#include "rng.hpp"
#include "simplex.hpp"
#include "synthetic.hpp"
#include "training.hpp"
