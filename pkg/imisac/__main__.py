import sys

from imisac.runner import main

sys.exit(main())
