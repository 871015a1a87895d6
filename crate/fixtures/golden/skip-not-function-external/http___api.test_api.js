var api = {};
if (typeof api.start === 'function') {api.start();} else {typeof __selfheal!=='undefined'&&__selfheal.activation("LineSkipper","NotAFunction|api.start|http://api.test/api.js|2|4","http://api.test/api.js");}
var started = true;
