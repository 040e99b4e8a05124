#pragma once

#include "gctm/checkpoint.hpp"
#include "gctm/config.hpp"
#include "gctm/core.hpp"
#include "gctm/couplings.hpp"
#include "gctm/datasets.hpp"
#include "gctm/flow_ode.hpp"
#include "gctm/harness.hpp"
#include "gctm/inference.hpp"
#include "gctm/metrics.hpp"
#include "gctm/model.hpp"
#include "gctm/nn.hpp"
#include "gctm/oracle.hpp"
#include "gctm/plot.hpp"
#include "gctm/schedule.hpp"
#include "gctm/trainer.hpp"
#include "gctm/verify.hpp"
