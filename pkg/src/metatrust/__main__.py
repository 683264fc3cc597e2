import sys

from metatrust.cli import main

sys.exit(main())
