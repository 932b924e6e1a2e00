from gpccopf.cli import main

raise SystemExit(main())
