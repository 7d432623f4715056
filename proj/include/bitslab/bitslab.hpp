#pragma once

#include "bitslab/auction.hpp"
#include "bitslab/baselines.hpp"
#include "bitslab/config.hpp"
#include "bitslab/epoch.hpp"
#include "bitslab/errors.hpp"
#include "bitslab/experiment.hpp"
#include "bitslab/gibbs.hpp"
#include "bitslab/io.hpp"
#include "bitslab/metrics.hpp"
#include "bitslab/mle.hpp"
#include "bitslab/model.hpp"
#include "bitslab/policy.hpp"
#include "bitslab/rng.hpp"
#include "bitslab/stats.hpp"
#include "bitslab/svg.hpp"
