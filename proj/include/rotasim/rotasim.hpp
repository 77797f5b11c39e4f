#pragma once

#include "rotasim/block_table.hpp"
#include "rotasim/core.hpp"
#include "rotasim/engine.hpp"
#include "rotasim/experiment.hpp"
#include "rotasim/io.hpp"
#include "rotasim/metrics.hpp"
#include "rotasim/scheduler.hpp"
#include "rotasim/transfer.hpp"
#include "rotasim/workload.hpp"
