#pragma once

#include "dppo/adam.hpp"
#include "dppo/app.hpp"
#include "dppo/checkpoint.hpp"
#include "dppo/config.hpp"
#include "dppo/error.hpp"
#include "dppo/eval.hpp"
#include "dppo/maps.hpp"
#include "dppo/metrics.hpp"
#include "dppo/nav_env.hpp"
#include "dppo/nn.hpp"
#include "dppo/pgm.hpp"
#include "dppo/ppo.hpp"
#include "dppo/reward.hpp"
#include "dppo/rng.hpp"
#include "dppo/tensor.hpp"
#include "dppo/text.hpp"
#include "dppo/world.hpp"
