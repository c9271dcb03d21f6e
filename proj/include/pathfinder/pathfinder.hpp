#pragma once

#include "pathfinder/augment.hpp"
#include "pathfinder/autodiff.hpp"
#include "pathfinder/checkpoint.hpp"
#include "pathfinder/common.hpp"
#include "pathfinder/core.hpp"
#include "pathfinder/dataset.hpp"
#include "pathfinder/dfe.hpp"
#include "pathfinder/eval.hpp"
#include "pathfinder/grid.hpp"
#include "pathfinder/mla.hpp"
#include "pathfinder/network.hpp"
#include "pathfinder/params.hpp"
#include "pathfinder/plotting.hpp"
#include "pathfinder/rng.hpp"
#include "pathfinder/tensor.hpp"
#include "pathfinder/train.hpp"
