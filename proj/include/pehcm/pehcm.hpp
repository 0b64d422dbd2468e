#pragma once

#include "pehcm/checkpoint.hpp"
#include "pehcm/config.hpp"
#include "pehcm/data.hpp"
#include "pehcm/errors.hpp"
#include "pehcm/eval.hpp"
#include "pehcm/geometry.hpp"
#include "pehcm/gradcheck.hpp"
#include "pehcm/hcm_loss.hpp"
#include "pehcm/io.hpp"
#include "pehcm/mlr_head.hpp"
#include "pehcm/network.hpp"
#include "pehcm/pseudo_labels.hpp"
#include "pehcm/trainer.hpp"
