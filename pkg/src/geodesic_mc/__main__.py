import sys

from geodesic_mc.cli import main

sys.exit(main())
