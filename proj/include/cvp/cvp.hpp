#pragma once

#include "cvp/error.hpp"
#include "cvp/random.hpp"
#include "cvp/systems.hpp"
#include "cvp/measures.hpp"
#include "cvp/entropy.hpp"
#include "cvp/shadowing.hpp"
#include "cvp/weaving.hpp"
#include "cvp/variational.hpp"
#include "cvp/io.hpp"
#include "cvp/cli.hpp"
