#pragma once

#include "seenet/autodiff.hpp"
#include "seenet/checkpoint.hpp"
#include "seenet/data/business.hpp"
#include "seenet/data/manifest.hpp"
#include "seenet/data/mobility.hpp"
#include "seenet/data/synth.hpp"
#include "seenet/distance.hpp"
#include "seenet/graph.hpp"
#include "seenet/grid.hpp"
#include "seenet/log.hpp"
#include "seenet/metrics.hpp"
#include "seenet/optim.hpp"
#include "seenet/rng.hpp"
#include "seenet/sampling.hpp"
#include "seenet/second_order.hpp"
#include "seenet/seconv.hpp"
#include "seenet/split.hpp"
#include "seenet/ssl.hpp"
#include "seenet/tensor.hpp"
#include "seenet/train.hpp"
