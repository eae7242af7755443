#pragma once

#include "dtwin/common.hpp"
#include "dtwin/model.hpp"
#include "dtwin/state_space.hpp"
#include "dtwin/sde.hpp"
#include "dtwin/window.hpp"
#include "dtwin/ukf.hpp"
#include "dtwin/gpr.hpp"
#include "dtwin/twin.hpp"
#include "dtwin/io.hpp"
