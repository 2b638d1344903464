#pragma once

#include "mortvi/checkpoint.hpp"
#include "mortvi/error.hpp"
#include "mortvi/forecast.hpp"
#include "mortvi/guide.hpp"
#include "mortvi/inference.hpp"
#include "mortvi/leecarter.hpp"
#include "mortvi/math.hpp"
#include "mortvi/model.hpp"
#include "mortvi/panel.hpp"
#include "mortvi/rng.hpp"
#include "mortvi/runners.hpp"
#include "mortvi/scoring.hpp"
#include "mortvi/tape.hpp"
#include "mortvi/text.hpp"
