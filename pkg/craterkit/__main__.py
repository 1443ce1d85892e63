# This file is a part of craterkit.
#
# craterkit is free software; you can redistribute it and/or modify it
# under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.  See docs/source/license.rst.

from .cli import main

main()
