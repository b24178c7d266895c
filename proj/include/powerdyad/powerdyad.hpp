#pragma once

#include "powerdyad/baseline.hpp"
#include "powerdyad/checkpoint.hpp"
#include "powerdyad/commands.hpp"
#include "powerdyad/corpus.hpp"
#include "powerdyad/error.hpp"
#include "powerdyad/evaluation.hpp"
#include "powerdyad/features.hpp"
#include "powerdyad/masking.hpp"
#include "powerdyad/models.hpp"
#include "powerdyad/training.hpp"
#include "powerdyad/tuning.hpp"
