#pragma once

#include "pica/app.hpp"
#include "pica/artifacts.hpp"
#include "pica/common.hpp"
#include "pica/config.hpp"
#include "pica/datagen.hpp"
#include "pica/features.hpp"
#include "pica/metrics.hpp"
#include "pica/policy.hpp"
#include "pica/reward_model.hpp"
#include "pica/service.hpp"
#include "pica/shaping.hpp"
#include "pica/trainer.hpp"
#include "pica/trajectory.hpp"
#include "pica/trajectory_io.hpp"
#include "pica/types.hpp"
#include "pica/world.hpp"
