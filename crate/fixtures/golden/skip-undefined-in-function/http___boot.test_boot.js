function boot() {
  if (typeof setupTheme != 'undefined' && setupTheme) {setupTheme();} else {typeof __selfheal!=='undefined'&&__selfheal.activation("LineSkipper","NotDefined|setupTheme|http://boot.test/boot.js|2|2","http://boot.test/boot.js");}
  return true;
}
var booted = boot();
