import sys

from eigenrom.cli import main

sys.exit(main())
