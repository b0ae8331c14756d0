#pragma once

#include "transvis/error.hpp"
#include "transvis/rng.hpp"
#include "transvis/parallel.hpp"
#include "transvis/matrix.hpp"
#include "transvis/features_io.hpp"
#include "transvis/graph.hpp"
#include "transvis/clustering.hpp"
#include "transvis/neighbors.hpp"
#include "transvis/transitivity.hpp"
#include "transvis/triplet_sampler.hpp"
#include "transvis/metric_learning.hpp"
#include "transvis/synth.hpp"
#include "transvis/eval.hpp"
#include "transvis/pipeline.hpp"
