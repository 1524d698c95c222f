from njet.cli import main

main()
