import sys

from edge_rtm.cli import main

sys.exit(main())
