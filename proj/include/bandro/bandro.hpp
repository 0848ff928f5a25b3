#pragma once

#include "bandro/core.hpp"
#include "bandro/lp.hpp"
#include "bandro/band_sr.hpp"
#include "bandro/band_kde.hpp"
#include "bandro/dro.hpp"
#include "bandro/oracle.hpp"
#include "bandro/problems.hpp"
#include "bandro/experiments.hpp"
