import sys

from gtsa.cli import main

sys.exit(main())
