#pragma once

#include "tae/autodiff.hpp"
#include "tae/binary_io.hpp"
#include "tae/centroids.hpp"
#include "tae/class_map.hpp"
#include "tae/data.hpp"
#include "tae/error.hpp"
#include "tae/experiment.hpp"
#include "tae/metrics.hpp"
#include "tae/models.hpp"
#include "tae/optimizer.hpp"
#include "tae/parameters.hpp"
#include "tae/rebalance.hpp"
#include "tae/rng.hpp"
#include "tae/sensitivity.hpp"
#include "tae/synthetic.hpp"
#include "tae/tensor.hpp"
#include "tae/trainer.hpp"
