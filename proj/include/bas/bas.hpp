#pragma once

#include "bas/clock.hpp"
#include "bas/detector.hpp"
#include "bas/error.hpp"
#include "bas/eval.hpp"
#include "bas/fusion.hpp"
#include "bas/geo.hpp"
#include "bas/hash.hpp"
#include "bas/imagery.hpp"
#include "bas/search.hpp"
#include "bas/service.hpp"
#include "bas/store.hpp"
#include "bas/time.hpp"
