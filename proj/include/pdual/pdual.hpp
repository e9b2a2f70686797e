#pragma once

#include "pdual/kinematics.hpp"
#include "pdual/imu_model.hpp"
#include "pdual/jacobians.hpp"
#include "pdual/state_filter.hpp"
#include "pdual/param_estimator.hpp"

#include "pdual/pipeline/wire.hpp"
#include "pdual/pipeline/transport.hpp"
#include "pdual/pipeline/node.hpp"
#include "pdual/pipeline/server.hpp"
#include "pdual/pipeline/topology.hpp"

#include "pdual/experiment/trajectory.hpp"
#include "pdual/experiment/config.hpp"
#include "pdual/experiment/dataset.hpp"
#include "pdual/experiment/sweep.hpp"
#include "pdual/experiment/results.hpp"
#include "pdual/experiment/verification.hpp"
