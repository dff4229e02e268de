import sys

from clusterrec.cli import main

sys.exit(main())
